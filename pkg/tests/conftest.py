import pytest

from cryodaq.archive import Archive
from cryodaq.condition import AmplifierConfig
from cryodaq.registry import ChannelDescriptor, ChannelKind, Registry


@pytest.fixture
def archive(tmp_path):
    return Archive(tmp_path / "archive")


def fast_desc(device, data, **amp):
    return ChannelDescriptor(device, data, ChannelKind.FAST, amplifier=AmplifierConfig(**amp))


@pytest.fixture
def registry():
    return Registry()
