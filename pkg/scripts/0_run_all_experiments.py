import glob
import logging
import os

from hdinfer import experiments, io


# =========
# Constants
# =========
EXPERIMENTS_FOLDER_NAME = "experiments"
N_JOBS = -1


# ======
# Logger
# ======
logging.basicConfig(
    format="[%(levelname)s] %(asctime)s %(message)s", level=logging.INFO
)
logger = logging.getLogger(__name__)


# ===============
# Run experiments
# ===============
config_paths = sorted(
    glob.glob(
        os.path.join(io.get_conf_path(), EXPERIMENTS_FOLDER_NAME, "*.json")
    )
)
logger.info(f"Found {len(config_paths)} experiment configs")
for config_path in config_paths:
    cfg = experiments.load_config(config_path)
    # Outputs are relative to the repository root
    folder = os.path.join(io.get_lib_path(), cfg.output_dir)
    output = experiments.run_experiment(cfg=cfg, n_jobs=N_JOBS)
    experiments.write_outputs(cfg=cfg, output=output, folder=folder)
logger.info("Ran all experiments")
