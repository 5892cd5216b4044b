import json
import os

from config import settings


def _cache_file(name):
    return os.path.join(settings.CACHE_DIR, f"{name}.json")


def _load(path):
    if not os.path.exists(path):
        return {}

    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError:
            return {}


def save_entry(name, key, data):
    """Save an offline artefact under `key` in <cache>/<name>.json"""
    path = _cache_file(name)
    entries = _load(path)
    entries[str(key)] = data

    os.makedirs(settings.CACHE_DIR, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(entries, f, indent=2, sort_keys=True)


def get_entry(name, key):
    """Get a cached artefact, or None when absent"""
    return _load(_cache_file(name)).get(str(key))

