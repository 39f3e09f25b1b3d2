"""SIBF – command-line launcher."""

import sys

from SibfCli import SibfCli


def run() -> None:
    sys.exit(SibfCli().run(sys.argv[1:]))


if __name__ == "__main__":
    run()
