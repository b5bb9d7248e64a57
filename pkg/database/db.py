"""
Database connection and session management
Uses DATABASE_URL if set, otherwise a local SQLite file (dice_cache.db)
"""
import sys
from pathlib import Path

# Add parent directory to path for imports when run directly
if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent.parent))

import logging
import os

from dotenv import load_dotenv
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, scoped_session
from database.models import Base

load_dotenv()

logger = logging.getLogger(__name__)

DB_FILE = "dice_cache.db"

_engine = None
SessionLocal = scoped_session(sessionmaker())


def get_database_url():
    """DATABASE_URL from the environment, else the local SQLite file"""
    url = os.getenv('DATABASE_URL')
    if not url:
        return f"sqlite:///{DB_FILE}"
    # SQLAlchemy needs postgresql:// rather than postgres://
    if url.startswith('postgres://'):
        url = url.replace('postgres://', 'postgresql://', 1)
    return url


def configure_database(url=None):
    """(Re)bind the session factory to a database URL"""
    global _engine
    url = url or get_database_url()
    SessionLocal.remove()
    if _engine is not None:
        _engine.dispose()
    _engine = create_engine(url, echo=False)
    SessionLocal.configure(bind=_engine)
    logger.debug("Using database %s", _engine.url.render_as_string(hide_password=True))
    return _engine


def get_engine():
    if _engine is None:
        configure_database()
    return _engine


def init_db():
    """Initialize the database, creating all tables"""
    Base.metadata.create_all(get_engine())
    logger.info("Database initialized (%s)", get_engine().dialect.name)


def get_session():
    """Get a database session"""
    get_engine()
    return SessionLocal()


def close_session():
    """Close the scoped session"""
    SessionLocal.remove()


if __name__ == "__main__":
    # Initialize database when run directly
    init_db()
    print("[OK] Database setup complete!")
