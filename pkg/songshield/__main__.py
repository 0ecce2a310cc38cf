# -*- coding: utf-8 -*-

import sys

from songshield.cli import main

sys.exit(main())
