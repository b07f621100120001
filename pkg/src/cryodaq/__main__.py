import sys

from cryodaq.cli import main

sys.exit(main())
