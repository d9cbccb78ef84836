"""pytest wiring for the absltest-based suite.

absltest.main() normally parses absl flags; under pytest nothing does, so mark
them parsed with their defaults (e.g. --slow stays off).
"""

from absl import flags


def pytest_configure(config):
    del config
    flags.FLAGS.mark_as_parsed()
