import sys

from react_ood.cli import main

sys.exit(main())
