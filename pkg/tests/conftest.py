"""Shared fixtures."""

import pytest

from weakbias.corpus import SideLabel

from helpers import make_corpus


@pytest.fixture
def small_corpus():
    return make_corpus(
        [
            ("a1", "guns and safety. the debate goes on.", SideLabel.LEFT, "outlet-l1"),
            ("a2", "guns on campus spark debate", SideLabel.LEFT, "outlet-l2"),
            ("a3", "tax cuts pass the house", SideLabel.RIGHT, "outlet-r1"),
            ("a4", "the house votes on tax policy", SideLabel.RIGHT, "outlet-r2"),
        ]
    )
