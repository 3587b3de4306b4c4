"""Python face of the motion-text retrieval core.

The compiled module speaks JSON strings and paths; the helpers below accept
and return plain dicts instead.
"""

import json as _json

from ._motext import *  # noqa: F401,F403
from ._motext import __doc__  # noqa: F401
from . import _motext as _core


def synth_corpus(config, out_dir):
    """Generates the synthetic corpus; returns the manifest path."""
    return str(_core.run_synth(_json.dumps(config), str(out_dir)))


def train(config):
    """Trains from a run-config dict; returns the checkpoint path."""
    return str(_core.run_train(_json.dumps(config)))


def evaluate(config, checkpoint):
    """Evaluates a checkpoint; returns the report as a dict."""
    return _json.loads(_core.run_eval(_json.dumps(config), str(checkpoint)))


def summarize(report_paths, out_dir):
    """Aggregates report.json files into summary tables under out_dir."""
    _core.run_report([str(p) for p in report_paths], str(out_dir))
