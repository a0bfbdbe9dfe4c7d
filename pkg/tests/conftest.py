import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from sparsegest import SynthConfig, detector_config, generate_synthetic, recognizer_config, train
from sparsegest.model import ExternalHiddenState
from sparsegest.training import TrainingConfig

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Desk-scale setup shared by the end-to-end checks: small widths and a short
# schedule with a batch size that still yields several updates per epoch.
DESK_HIDDEN = 32
DESK_EPOCHS = 50


def desk_training(seed: int) -> TrainingConfig:
    return TrainingConfig(learning_rate=0.005, gamma=0.97, batch_size=8, epochs=DESK_EPOCHS, seed=seed)


def train_desk_models(train_set, seed: int):
    tc = desk_training(seed)
    det, det_log = train("detector", train_set, tc, detector_config(train_set.input_dim, DESK_HIDDEN, seed))
    rec, rec_log = train(
        "recognizer", train_set, tc,
        recognizer_config(train_set.input_dim, (DESK_HIDDEN,) * 3, train_set.num_classes, 0.2, seed),
    )
    return det, rec, det_log, rec_log


@pytest.fixture(scope="session")
def synth_data():
    cfg = SynthConfig()
    return generate_synthetic(cfg, "train"), generate_synthetic(cfg, "test")


@pytest.fixture(scope="session")
def desk_models(synth_data):
    """Models trained on the desk-scale synthetic set, keyed by seed, built lazily."""
    cache = {}

    def get(seed=0):
        if seed not in cache:
            cache[seed] = train_desk_models(synth_data[0], seed)
        return cache[seed]

    return get


class ScriptedDetector:
    """Replays a fixed confidence per processed frame, ignoring its input."""

    def __init__(self, confidences):
        self.confidences = list(confidences)
        self.t = 0
        self.resets = 0

    def zero_state(self):
        self.resets += 1
        return ExternalHiddenState([np.zeros(1)])

    def step(self, hidden, x):
        c = self.confidences[self.t]
        self.t += 1
        return c, ExternalHiddenState([hidden.layers[0] + 1])


class ScriptedRecognizer:
    """Replays probability vectors; hidden state counts steps since the last reset."""

    def __init__(self, probs, num_classes=None):
        self.probs = [np.asarray(p, dtype=float) for p in probs]
        self.num_classes = num_classes or len(self.probs[0])
        self.t = 0
        self.seen_hidden = []

    def zero_state(self):
        return ExternalHiddenState([np.zeros(1)])

    def step(self, hidden, x):
        self.seen_hidden.append(float(hidden.layers[0][0]))
        p = self.probs[self.t % len(self.probs)]
        self.t += 1
        return p, ExternalHiddenState([hidden.layers[0] + 1])


@pytest.fixture
def still_frames():
    def make(n, dim=3):
        return np.zeros((n, dim))

    return make


# --- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
