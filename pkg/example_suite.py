import logging

from fbmlab.config import load_config
from fbmlab.harness import replay, run_experiment, suite

logging.basicConfig(level=logging.INFO)

config = load_config("configs/holder_time.toml")
report = run_experiment(config, threads=8, out_dir="out/holder_time", progress=True)
print(report.pooled, report.acceptance)

# same config and seeds, so the results match up to wall-clock time
assert replay("out/holder_time", threads=2).results() == report.results()

result = suite("configs/acceptance.toml", threads=8, out_dir="out/acceptance", progress=True)
for row in result.rows:
    print(row["status"], row["name"], row["message"])
