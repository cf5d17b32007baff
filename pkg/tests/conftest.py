import pytest

from sketchproof import kernels


@pytest.fixture
def restore_backend():
    """Let a test switch kernel backends and put the original back."""
    before = kernels.active_backend()
    yield before
    kernels.set_active_backend(before)
