import sys

from spaars.main import main

sys.exit(main())
