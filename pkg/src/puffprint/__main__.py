import sys

from puffprint.cli import main

sys.exit(main())
