"""dexmimic: dexterous manipulation policies learned from retargeted human hand motion."""
