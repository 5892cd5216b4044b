import os

from dotenv import load_dotenv

# Load environment variables from .env
load_dotenv()


def _flag(name, default):
    return os.getenv(name, default).strip().lower() == "true"


LOG_DIR = os.getenv("POBO_LOG_DIR", "logs")
LOG_TO_FILE = _flag("POBO_LOG_TO_FILE", "true")
DEBUG = _flag("POBO_DEBUG", "false")

# Offline artefacts (kinship coefficients, quadrature rules)
CACHE_DIR = os.getenv("POBO_CACHE_DIR", ".pobo_cache")

OUTPUT_DIR = os.getenv("POBO_OUTPUT_DIR", "out")
