import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cardiofuse.synthdata import GeneratorConfig, generate_dataset


def small_generator_config(**overrides):
    base = dict(
        latent_dim=4,
        lead_count=2,
        seq_len=64,
        routine_dim=6,
        n_diagnoses=3,
        n_labs=4,
        n_train=96,
        n_val=48,
        n_test=64,
        seed=11,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(small_generator_config())


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(GeneratorConfig())


@pytest.fixture(scope="session")
def ordering_panel(tmp_path_factory):
    """The full 5-seed comparison (signal-only, JE+recon, late-fusion) at
    generator and training defaults, plus its workdir of checkpoints.

    Expensive; shared by several acceptance criteria.
    """
    from cardiofuse.cli import reproduce_ordering_table

    workdir = tmp_path_factory.mktemp("ordering")
    cap = os.environ.setdefault(
        "CARDIOFUSE_THREADS", str(min(4, os.cpu_count() or 1))
    )
    start = time.time()
    table = reproduce_ordering_table({}, 5, workdir)
    elapsed = time.time() - start
    return {"table": table, "workdir": workdir, "elapsed": elapsed, "threads": cap}
