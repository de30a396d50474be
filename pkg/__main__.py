"""Run the toolkit from a checkout without installing it: `python . verify --quick`."""
from harness import app

if __name__ == "__main__":
    app(prog_name="gcsam")
