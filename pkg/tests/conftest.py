import pytest

from hvacqa.context import load_metadata
from hvacqa.dataset import DatasetSpec, generate_dataset, populate_store
from hvacqa.gateway import EchoBackend, ScriptedBackend
from hvacqa.harness import load_items
from hvacqa.store import parse_ts

FUZZ_SPEC = DatasetSpec(rooms=3, days=30, null_rate=0.1, seed=7)


@pytest.fixture(scope="session")
def fuzz_data():
    """(store, rooms, ts_list, arrays) for the oracle fuzz runs."""
    return populate_store(FUZZ_SPEC)


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory):
    """Generated default dataset: CSV, metadata, QA items, fixtures."""
    out = tmp_path_factory.mktemp("suite")
    generate_dataset(DatasetSpec(), out)
    return out


@pytest.fixture(scope="session")
def suite(suite_dir):
    """Everything run_suite needs, eagerly loaded and shared."""
    import json

    from hvacqa.store import ReadingStore

    manifest = json.loads((suite_dir / "manifest.json").read_text())
    store = ReadingStore(manifest["modalities"])
    store.ingest_csv(suite_dir / manifest["csv"])
    now = parse_ts(manifest["now"])
    metadata = {
        persona: load_metadata(suite_dir / rel, schema=manifest["modalities"],
                               rooms=store.rooms()).with_now(now)
        for persona, rel in manifest["metadata"].items()
    }
    return {
        "dir": suite_dir,
        "manifest": manifest,
        "store": store,
        "metadata": metadata,
        "items": load_items(suite_dir / manifest["qa_items"]),
        "planner": ScriptedBackend(suite_dir / manifest["fixtures"]),
        "responder": EchoBackend(),
    }
