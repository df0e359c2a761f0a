from datetime import datetime
from typing import Any, Dict, Optional

from sqlalchemy import JSON, Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

from src.utils.config import get_config_value

# Create SQLAlchemy base class
Base = declarative_base()


class RunModel(Base):
    """Database model for one evaluated run"""
    __tablename__ = "runs"

    id = Column(String, primary_key=True)
    name = Column(String, nullable=False)
    command = Column(String, nullable=False)
    checkpoint = Column(Text, nullable=True)
    dataset = Column(Text, nullable=True)
    num_samples = Column(Integer, default=0)
    config = Column(JSON, default=dict)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    metrics = relationship("RunMetricModel", back_populates="run", cascade="all, delete-orphan")

    def metric_values(self) -> Dict[str, float]:
        return {metric.name: metric.value for metric in self.metrics}

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation"""
        return {
            "id": self.id,
            "name": self.name,
            "command": self.command,
            "checkpoint": self.checkpoint,
            "dataset": self.dataset,
            "num_samples": self.num_samples,
            "config": self.config,
            "metrics": self.metric_values(),
        }


class RunMetricModel(Base):
    """One named scalar metric of a run"""
    __tablename__ = "run_metrics"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, ForeignKey("runs.id"), nullable=False)
    name = Column(String, nullable=False)
    value = Column(Float, nullable=False)

    run = relationship("RunModel", back_populates="metrics")


# Database connection management
class Database:
    def __init__(self, db_url: Optional[str] = None):
        """Initialize database connection"""
        self.db_url = db_url or get_config_value("database.url")
        self.engine = create_engine(self.db_url)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)

    def create_tables(self):
        """Create all defined tables"""
        Base.metadata.create_all(bind=self.engine)

    def get_session(self):
        """Get a database session"""
        return self.SessionLocal()

    def close(self):
        """Close database connection"""
        self.engine.dispose()
