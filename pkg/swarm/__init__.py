from .swarm import CollaborativeSwarm, SwarmConfig

__version__ = '0.1.0'
