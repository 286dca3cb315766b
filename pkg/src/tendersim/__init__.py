"""Deterministic discrete-event Tendermint simulator with ideal services, a
static-corruption adversary, WAL recovery and trace checkers."""

__version__ = "0.1.0"
