"""
Literal fixture data for unit tests: experiment configs and CSV text.
"""

# Two epochs of GCSAM over 160 training rows: 5 steps per epoch
TINY_RUN_CONFIG = {
    "version": 1,
    "name": "tiny",
    "model": {"layer_sizes": [2, 8, 2], "activation": "relu", "loss": "softmax_xent", "seed": 0},
    "data": {
        "source": {"kind": "two_moons", "n": 200, "noise_sigma": 0.2, "seed": 0},
        "split": {"test_fraction": 0.2, "seed": 0},
    },
    "optimizer": {
        "kind": "gcsam",
        "base": "sgd",
        "sgd": {"lr": 0.1},
        "sam": {"rho": 0.05},
    },
    "epochs": 2,
    "batch_size": 32,
    "seed": 0,
    "sharpness": {"rho": 0.05, "m": 4, "ascent_steps": 1},
}

# Same experiment with a plain Adam optimizer
ADAM_OPTIMIZER = {"kind": "adam", "adam": {"lr": 0.01}}

# Same experiment with SAM over SGD
SAM_OPTIMIZER = {"kind": "sam", "base": "sgd", "sgd": {"lr": 0.1}, "sam": {"rho": 0.05}}

# Clean classification file, label in the last column
CSV_CLASSIFICATION = """x0,x1,label
0.5,1.25,0
-1.0,2.0,1
3.5,-0.75,1
0.0,0.0,0
"""

# Regression file with the label first
CSV_REGRESSION = """y,a,b
1.5,0.1,0.2
-2.25,0.3,0.4
0.125,0.5,0.6
"""

# Row 1, file column 1 ('x1') is not a number
CSV_BAD_CELL = """x0,x1,label
0.5,1.25,0
-1.0,oops,1
"""

# Row 0 has a fractional class label
CSV_FRACTIONAL_LABEL = """x0,label
0.5,0.5
1.0,1
"""
