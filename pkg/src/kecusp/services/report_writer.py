import csv
import json
import logging
import os
import platform

import mpmath
import numpy as np
import pydantic
import scipy
from prometheus_client import REGISTRY, write_to_textfile


class ReportWriter:
    """Writes run artifacts into one output directory."""

    def __init__(self, out_dir):
        self.logger = logging.getLogger(__name__)
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.written = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def track(self, name):
        if name not in self.written:
            self.written.append(name)
        self.logger.info(f"[artifacts] Wrote {self.path(name)}")

    def save_json(self, name, data):
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False, default=_jsonable)
        self.track(name)

    def write_csv(self, name, header, rows):
        """Rows of floats are written with repr so reruns are bit-identical."""
        with open(self.path(name), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(x)) if _is_number(x) else x for x in row])
        self.track(name)

    def write_with(self, name, dump_fn, *args):
        """Delegates to a module-level dumper such as profile_to_csv(obj, path)."""
        dump_fn(*args, self.path(name))
        self.track(name)

    def write_report(self, name, sections):
        """sections: list of (title, [(key, value), ...])."""
        lines = []
        for title, items in sections:
            lines.append(f"== {title} ==")
            for key, value in items:
                lines.append(f"{key}: {_format(value)}")
            lines.append("")
        with open(self.path(name), "w", encoding="utf-8") as f:
            f.write("\n".join(lines))
        self.track(name)

    def write_metrics(self, name="metrics.prom"):
        write_to_textfile(self.path(name), REGISTRY)
        self.track(name)

    def write_manifest(self, config, status, constants, name="manifest.json"):
        manifest = {
            "config": config.model_dump(mode="json"),
            "status": status,
            "constants": constants,
            "versions": versions(),
            "artifacts": [n for n in self.written if n != name],
        }
        self.save_json(name, manifest)


def versions():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
        "pydantic": pydantic.VERSION,
    }


def _is_number(x):
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def _format(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return str(value)
