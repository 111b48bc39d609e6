"""
Console entry point: `curl-equilib run|rates|check-mesh`
"""
from flask.cli import FlaskGroup

from . import create_app

cli = FlaskGroup(create_app=create_app, add_default_commands=False, load_dotenv=False,
                 help="Equilibrated flux error estimation for curl-curl magnetostatics.")


def main():
    cli.main(prog_name="curl-equilib")


if __name__ == "__main__":
    main()
