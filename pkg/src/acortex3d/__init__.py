"""Time-domain 3D-NAND VMM simulation, design-space exploration and accelerator estimation."""

__version__ = "0.1.0"
