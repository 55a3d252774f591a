#db.py
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base
from .config import settings


db_url = settings.get_db_url()
connect_args = {}
if settings.is_sqlite:
    # report jobs write from a background thread
    connect_args = {"check_same_thread": False}
    if db_url.startswith("sqlite:///") and db_url != "sqlite:///:memory:":
        Path(db_url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
engine = create_engine(db_url, echo=settings.db_echo, future=True, connect_args=connect_args)

SessionLocal = sessionmaker(bind=engine, autoflush=False, autocommit=False, future=True)
Base = declarative_base()

def get_db():
    """ FastAPI DB Session """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
