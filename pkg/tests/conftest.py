import pytest

from factedit.core import EntityMap, Instance, Triple, tokenize

# Baymax example: six triples, a draft with an unsupported award fact and a
# revision adding the missing creator, nationality and cast facts.
BAYMAX_TRIPLES = (
    Triple("Baymax", "creator", "Duncan_Rouleau"),
    Triple("Duncan_Rouleau", "nationality", "American"),
    Triple("Baymax", "creator", "Steven_T._Seagle"),
    Triple("Steven_T._Seagle", "nationality", "American"),
    Triple("Baymax", "series", "Big_Hero_6"),
    Triple("Big_Hero_6", "starring", "Scott_Adsit"),
)
BAYMAX_DRAFT = tokenize(
    "Baymax was created by Duncan_Rouleau , a winner of Eagle_Award . Baymax is a character in Big_Hero_6 ."
)
BAYMAX_REVISED = tokenize(
    "Baymax was created by American creators Duncan_Rouleau and Steven_T._Seagle . "
    "Baymax is a character in Big_Hero_6 which stars Scott_Adsit ."
)
BAYMAX_ENTITIES = EntityMap(
    {
        "AGENT-1": "Baymax",
        "BRIDGE-1": "Duncan_Rouleau",
        "PATIENT-1": "American",
        "BRIDGE-2": "Steven_T._Seagle",
        "BRIDGE-3": "Big_Hero_6",
        "PATIENT-2": "Scott_Adsit",
        "PATIENT-3": "Eagle_Award",
    }
)

PUDDING_DRAFT = tokenize("Bakewell_pudding is Dessert that can be served Warm or cold .")
PUDDING_REVISED = tokenize("Bakewell_pudding is Dessert that originates from Derbyshire_Dales .")
PUDDING_TRIPLES = (
    Triple("Bakewell_pudding", "course", "Dessert"),
    Triple("Bakewell_pudding", "region", "Derbyshire_Dales"),
)


@pytest.fixture
def baymax():
    return Instance(BAYMAX_TRIPLES, BAYMAX_DRAFT, BAYMAX_REVISED, BAYMAX_ENTITIES)


@pytest.fixture
def pudding():
    return Instance(PUDDING_TRIPLES, PUDDING_DRAFT, PUDDING_REVISED)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the end-of-session summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
