from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from helpers import tiny_architecture

from partmask_hub.core.network import Network
from partmask_hub.core.templates import build_templates
from partmask_hub.infra.archive import save_archive
from partmask_hub.synthgen.config import GeneratorConfig
from partmask_hub.synthgen.generator import generate


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def bank6():
    return build_templates(6)


@pytest.fixture(scope="session")
def generator_config() -> GeneratorConfig:
    return GeneratorConfig(seed=7)


@pytest.fixture(scope="session")
def scenes(generator_config):
    return generate(generator_config, 24)


@pytest.fixture
def tiny_net() -> Network:
    return Network.initialize(tiny_architecture(num_categories=6), seed=3)


@pytest.fixture
def archive_dir(tmp_path, scenes) -> Path:
    root = tmp_path / "scenes"
    save_archive(root, scenes)
    return root
