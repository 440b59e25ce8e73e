"""Slot-error analysis of random linear streaming codes over multi-hop erasure relays."""
