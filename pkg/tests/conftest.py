import pytest

from deskcache import ensure_desk, load_desk_net


@pytest.fixture(scope="session")
def desk():
    """Desk-scale artifacts: (config, dataset, trained network).

    Builds the cache under tests/_cache on first use, which takes a long
    while (dataset generation plus full training); later sessions reuse it.
    Deselect with ``-m "not desk"`` to skip everything that needs it.
    """
    from ofdmlab.harness import load_dataset

    cfg, manifest, ckpt = ensure_desk()
    return cfg, load_dataset(manifest), load_desk_net(ckpt)
