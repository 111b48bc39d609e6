import logging
from typing import Mapping, Optional

from flask import Flask

from .config import Config

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def create_app(overrides: Optional[Mapping] = None):
    app = Flask(__name__)
    app.config.from_object(Config)
    if overrides:
        app.config.from_mapping(overrides)

    logging.basicConfig(level=app.config["LOG_LEVEL"], format=LOG_FORMAT)
    logging.getLogger(__name__).setLevel(app.config["LOG_LEVEL"])

    # Register blueprints
    from .blueprints import experiments
    app.register_blueprint(experiments.experiments_bp)

    return app
