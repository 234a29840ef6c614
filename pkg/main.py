import sys
from typing import Optional

from flask import Flask

from src.routes.analysis_routes import qkd_bp
from src.database import init_app as init_db

def create_app(database_uri: Optional[str] = None):
    """Create and configure an instance of the Flask application."""
    app = Flask(__name__)

    # Initialize the run archive
    init_db(app, database_uri)

    # Register Blueprints
    app.register_blueprint(qkd_bp)

    @app.route('/')
    def hello_world():
        return 'Hello, time-bin QKD toolkit!'

    return app

if __name__ == '__main__':
    from src.cli import main
    sys.exit(main())
