import sys

from fbmlab.cli import main

sys.exit(main())
