"""Acceptance gate: every exit criterion at its stated tolerance.

Criteria A5-A8 share preset runs through the module-scoped context, so the
whole gate runs each preset exactly once.  Run with ``pytest -s`` (or use
``asynclqr verify``) to see the one-line pass/fail verdicts.
"""

import pytest

from asynclqr import acceptance


@pytest.fixture(scope="module")
def ctx(tmp_path_factory):
    return acceptance.AcceptanceContext(
        seed=0, out_dir=tmp_path_factory.mktemp("acceptance-artifacts")
    )


@pytest.mark.parametrize("name", list(acceptance.CRITERIA))
def test_criterion(ctx, name):
    result = acceptance.CRITERIA[name](ctx)
    print(result.line())
    assert result.passed, result.line()
