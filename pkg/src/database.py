"""
Database configuration module.
"""
import os
from typing import Optional

from flask_sqlalchemy import SQLAlchemy
from flask import Flask

# Create a SQLAlchemy instance
db = SQLAlchemy()

DEFAULT_DATABASE_URI = "sqlite:///qkd_runs.db"


def database_uri_for(path: Optional[str]) -> str:
    """SQLAlchemy URI for a run archive path; a value with '://' is taken as a URI."""
    if not path:
        return os.environ.get("TBQKD_DATABASE_URI", DEFAULT_DATABASE_URI)
    if "://" in path:
        return path
    return f"sqlite:///{os.path.abspath(path)}"


def init_app(app: Flask, database_uri: Optional[str] = None) -> None:
    """
    Initialize the run archive with the Flask application.

    Args:
        app: The Flask application instance.
        database_uri: SQLAlchemy URI; defaults to TBQKD_DATABASE_URI or a local SQLite file.
    """
    app.config["SQLALCHEMY_DATABASE_URI"] = database_uri or database_uri_for(None)
    app.config["SQLALCHEMY_TRACK_MODIFICATIONS"] = False

    # Initialize the database with the app
    db.init_app(app)

    # Create database tables if they don't exist
    with app.app_context():
        from .models import analysis_run  # noqa: F401  registers the tables
        db.create_all()
