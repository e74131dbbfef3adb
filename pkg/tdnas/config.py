# tdnas/config.py
from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

OUT_DIR = Path(os.getenv("TDNAS_OUT_DIR", str(BASE_DIR / "runs")))
WORKERS = int(os.getenv("TDNAS_WORKERS", "1"))
ORACLE_CAP = int(os.getenv("TDNAS_ORACLE_CAP", "10000"))
LOG_LEVEL = os.getenv("TDNAS_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("TDNAS_LOG_FILE") or None

# Artifact names inside an output directory
DATASET_FILE = "dataset.synd"
SUPERNET_FILE = "supernet.tdnf"
TRAJECTORY_FILE = "lambda_trajectory.csv"
TOPN_FILE = "topN.txt"
RETRAIN_TABLE = "retrain.csv"
ORACLE_FILE = "oracle.csv"
BASELINE_TABLE = "baseline.csv"
BASELINE_FILE = "baseline.txt"
TWO_STAGE_FILE = "two_stage.txt"
REPORT_FILE = "report.txt"
REPORT_PDF = "report.pdf"


def retrain_file(k: int) -> str:
    return f"retrain_{k}.tdnf"
