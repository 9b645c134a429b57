import sys
from pathlib import Path

# Tests import the shared generators module by file location.
sys.path.insert(0, str(Path(__file__).parent))
