#!/usr/bin/env python3
"""
Covert CSI toolkit
==================

Solves and simulates covert communication over state-dependent channels
when the transmitter knows the channel state.

Commands:
- validate: check a channel file
- capacity: covert capacity with causal or noncausal CSI
- awgn: closed forms for the Gaussian channel with interference
- simulate: random-coding experiments at small blocklengths
- surface: the C(A,B) trade-off grid
"""

import sys
import logging
from dotenv import load_dotenv

from config import LOG_LEVEL
from covertcsi.cli import main

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


if __name__ == "__main__":
    sys.exit(main())
