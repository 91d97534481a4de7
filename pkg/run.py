#!/usr/bin/env python3
"""
Startup script for the reachability cloud toolkit

    python run.py gen --preset minimal --omega 108 --phi 2 --out cloud.ply
"""

import importlib.util
import sys

# import name -> requirements.txt name
REQUIRED_PACKAGES = {
    'numpy': 'numpy',
    'scipy': 'scipy',
    'pandas': 'pandas',
    'click': 'click',
    'dotenv': 'python-dotenv',
    'pydantic': 'pydantic',
    'matplotlib': 'matplotlib',
    'joblib': 'joblib',
}


def missing_dependencies():
    """Requirement names whose modules cannot be found"""
    missing = [pip_name for module, pip_name in REQUIRED_PACKAGES.items()
               if importlib.util.find_spec(module) is None]
    if sys.version_info < (3, 11) and importlib.util.find_spec('tomli') is None:
        missing.append('tomli')
    return missing


def main():
    """Check the environment and hand over to the command line"""
    missing = missing_dependencies()
    if missing:
        print(f"Missing required packages: {', '.join(missing)}")
        print("Please install them using: pip install -r requirements.txt")
        sys.exit(1)

    from cli import main as cli_main
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == '__main__':
    main()
