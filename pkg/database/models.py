"""
Database models for the calibrated-policy cache
CalibrationRun (one optimizer run) and PolicyValue (its mu path)
"""
from sqlalchemy import Column, Integer, String, Float, Boolean, DateTime, ForeignKey
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime

Base = declarative_base()


class CalibrationRun(Base):
    """Calibrated abatement policy for one parameter set / optimizer settings pair"""
    __tablename__ = "calibration_runs"

    id = Column(Integer, primary_key=True)
    parameter_set = Column(String(100), nullable=False)
    parameter_fingerprint = Column(String(64), nullable=False, index=True)
    settings_fingerprint = Column(String(64), nullable=False, index=True)

    # Optimizer outcome
    iterations = Column(Integer, nullable=False)
    converged = Column(Boolean, default=False, nullable=False)
    gradient_norm = Column(Float, nullable=True)  # projected-gradient max-norm
    welfare = Column(Float, nullable=True)
    n_periods = Column(Integer, nullable=False)

    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    values = relationship("PolicyValue", back_populates="run",
                          order_by="PolicyValue.period", cascade="all, delete-orphan")


class PolicyValue(Base):
    """One period of a calibrated mu path"""
    __tablename__ = "policy_values"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("calibration_runs.id"), nullable=False)
    period = Column(Integer, nullable=False)
    year = Column(Float, nullable=False)
    mu = Column(Float, nullable=False)

    run = relationship("CalibrationRun", back_populates="values")
