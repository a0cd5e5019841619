import pytest

from ssff.domain import FounderProfile, StartupRecord
from ssff.llm_gateway import mock_gateway


@pytest.fixture
def startup():
    return StartupRecord(
        name="Acme Health",
        description="AI-powered health monitoring wearable device for chronic care patients.",
        founders=(
            FounderProfile(
                raw_text="MBA from Stanford, 5 years at Google as Product Manager",
                structured_hints={
                    "track_records": "Successfully launched two products at Google, one reaching 1M users",
                    "leadership_skills": "Led a team of 10 engineers and designers",
                },
            ),
        ),
    )


@pytest.fixture
def gateway():
    return mock_gateway(seed=7)
