import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proneval.lexicon import load_lexicon


@pytest.fixture
def tiny_lexicon(tmp_path):
    """Small lexicon over a compact inventory, one word with two variants."""
    main = tmp_path / "lexicon.txt"
    main.write_text(
        "cat\tK AE T\n"
        "cot\tK AA T\n"
        "at\tAE T\n"
        "a\tAH\n"
        "b\tB IY\n"
        "tea\t0.7\tT IY\n"
        "tea\t0.3\tT EY\n",
        encoding="utf-8",
    )
    return load_lexicon(str(main))
