"""Deterministic simulator of time-triggered Ethernet with copy forwarding."""
