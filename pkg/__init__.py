"""GCSAM toolkit: gradient-centralized sharpness-aware minimization at desk scale"""
