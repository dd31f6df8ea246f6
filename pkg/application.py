"""
Command-line entry point: python application.py <command> [options]
"""
import sys
import os

# Add the current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from backend.app import cli as application

if __name__ == "__main__":
    application(prog_name="avgctl")
