from __future__ import annotations

import pytest

from projects import relu_project, resnet_project


@pytest.fixture(scope="session")
def resnet():
    return resnet_project()


@pytest.fixture(scope="session")
def relu_demo():
    return relu_project()


@pytest.fixture()
def std_package_dir(tmp_path):
    from protoml.stdlib import build_std_package

    return build_std_package(tmp_path / "std_pkg")
