"""Decentralised malware firewall: byteplot images, a DBN detector per node,
and a proof-of-work verdict chain with trust-weighted consensus."""

__version__ = "0.1.0"
