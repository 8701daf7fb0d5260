"""Detection time versus sample length for the default model.

Run: STEGSAGE_THREADS=1 python3 demos/latency.py
"""

from stegsage import ModelConfig, bench_detection, init_params

config = ModelConfig()
# detection cost does not depend on the weights, so an untrained model will do
report = bench_detection(init_params(config), config, lengths=[50, 100, 500, 1000], runs=50)
print(report.format())
