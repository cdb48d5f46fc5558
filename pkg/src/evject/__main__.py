import sys

from evject.cli import main

sys.exit(main())
