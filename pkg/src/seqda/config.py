"""Flat key-value config files, run manifests, and the worker-thread cap."""

import json
import os


def load_flat_config(path):
    """Parse `key = value` lines; values are JSON when possible, else strings."""
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError("%s line %d: expected 'key = value'" % (path, lineno))
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                cfg[key] = json.loads(value)
            except json.JSONDecodeError:
                cfg[key] = value
    return cfg


def save_flat_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(cfg):
            fh.write("%s = %s\n" % (k, json.dumps(cfg[k])))


def write_manifest(out_dir, command, options, seeds):
    from . import __version__, KERNEL_BACKEND
    manifest = {
        "command": command,
        "options": options,
        "seeds": seeds,
        "version": __version__,
        "kernel_backend": KERNEL_BACKEND,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def thread_count():
    """Worker-thread cap: SEQDA_THREADS, default machine cores."""
    env = os.environ.get("SEQDA_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("SEQDA_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
