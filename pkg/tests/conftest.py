import pytest

from vitallake.simgen import freeze_benchmark_corpus, load_corpus


@pytest.fixture(scope="session")
def frozen_corpus(tmp_path_factory):
    """The canonical seed-42 benchmark corpus, generated once per session."""
    corpus_dir = tmp_path_factory.mktemp("corpus")
    manifest = freeze_benchmark_corpus(corpus_dir)
    records, _ = load_corpus(corpus_dir)
    return records, manifest, corpus_dir
