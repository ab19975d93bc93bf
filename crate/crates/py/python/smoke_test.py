"""Smoke test for the macam extension module.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import math
import tempfile

import macam

TINY = """
seed = 3

[model]
conv_channels = [4, 8]
pool_after = [0]
alpha_init = 2.0

[schedule]
warmup_epochs = 2
search_epochs = 3
retrain_epochs = 2
theta_lr0 = 10.0
batch_size = 16

[noise]
mc_samples = 200

[dataset]
kind = "synthetic"
classes = 3
train_per_class = 12
test_per_class = 6
size = 8

[eval]
runs = 3
"""


def check_codebook():
    cb = macam.Codebook([0.0, 1.0, 2.0, 3.0, 4.0])
    assert len(cb) == 5
    assert cb.project(1.5) == 1.5
    assert cb.project(9.0) == 4.0
    assert cb.encode(2.0) == 2
    assert cb.activate(-1.0, 2.0) == 0.0
    assert cb.alpha_grad(5.0, 2.0) == 1.0
    try:
        cb.encode(-0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("negative input accepted")
    m1 = macam.Codebook.builtin("MACAM-1")
    profile = m1.characterize_variation(0.0, 100, 1)
    assert all(s == 0.0 for s in profile["per_interval_input_sigma"])


def check_energy():
    assert macam.digital_activate(5.0, 2.0, 6) == 2.0
    assert macam.tau_schedule(0, 80) == 5.0
    assert math.isclose(macam.tau_schedule(79, 80), 0.5)
    layers = [(16, 1, 3, 8, 8, 128), (32, 16, 3, 8, 8, 128)]
    hw = macam.HardwareEnergy("MACAM-1", "ADC-1")
    analog = [["analog"] * 16, ["analog"] * 32]
    digital = [["digital"] * 16, ["digital"] * 32]
    e = macam.normalized_energy(layers, analog, hw)
    assert math.isclose(e, hw.e_anlg / hw.e_digi_adc, rel_tol=1e-9), e
    assert math.isclose(macam.normalized_energy(layers, digital, hw), 1.0, rel_tol=1e-12)
    assert macam.energy_penalty(0.2) == 0.0
    assert macam.energy_penalty(0.9) > 0.0 > macam.energy_penalty(0.05)


def check_workbench():
    wb = macam.Workbench.from_toml(TINY)
    assert wb.seed == 3
    with tempfile.TemporaryDirectory() as out:
        try:
            wb.retrain(out)
        except OSError:
            pass
        else:
            raise AssertionError("retrain ran without an assignment")
        summary = wb.pipeline(out)
        assert 0.0 <= summary["eval"]["clean_accuracy"] <= 1.0
        report = wb.energy_report(out)
        assert 0.0 < report["normalized_act_energy"] <= 1.0


if __name__ == "__main__":
    check_codebook()
    check_energy()
    check_workbench()
    print("macam smoke test passed")
