import sys

from supergnn.expcli.cli import main

sys.exit(main())
