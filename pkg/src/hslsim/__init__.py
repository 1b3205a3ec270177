"""Simulator for hub-and-spoke decentralized learning and its mixing bounds."""

__version__ = "0.1.0"
