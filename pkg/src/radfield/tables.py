"""Mass attenuation and energy-absorption tables, 1 to 150 keV.

Values are cm^2/g on a common energy grid in keV.  Totals are standard
published values for dry air, liquid water, and average soft tissue;
the photoelectric and incoherent columns are a two-channel split of those
totals consistent with the free-electron scattering model used by the
transport code (see data/README.md for the construction).  Tables extend
below 10 keV because the lowest spectrum bins and the 1 keV transport
cutoff both live there.

Electron densities are electrons per gram.
"""

ENERGIES_KEV = [1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0,
                15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 150.0]

# water, 1.0 g/cm^3
TOTAL_WATER = [4078.0, 1376.0, 617.3, 192.9, 82.78, 42.58, 24.64, 10.37, 5.329,
               1.673, 0.8096, 0.3756, 0.2683, 0.2269, 0.2059, 0.1837, 0.1707, 0.1505]
PE_WATER = [4077.778486, 1375.778915, 617.079, 192.68, 82.561, 42.361864,
            24.422687, 10.1543, 5.1149, 1.35951, 0.530998, 0.141136, 0.055125,
            0.026586, 0.0146519, 0.00572274, 0.00276, 0.000733594]
COMPTON_WATER = [0.221514, 0.221085, 0.220657, 0.219808, 0.218968, 0.218136,
                 0.217313, 0.21569, 0.214098, 0.210251, 0.206582, 0.199732,
                 0.193462, 0.187702, 0.182391, 0.17292, 0.164717, 0.14829]

# dry air near sea level, 0.0012 g/cm^3
TOTAL_AIR = [3606.0, 1191.0, 527.9, 162.5, 77.88, 40.27, 23.41, 9.921, 5.12,
             1.614, 0.7779, 0.3538, 0.2485, 0.208, 0.1875, 0.1662, 0.1541, 0.1356]
PE_AIR = [3605.8, 1190.8, 527.701561, 162.302, 77.68308, 40.0738, 23.214568,
          9.727028, 4.927459, 1.31317, 0.51386, 0.136943, 0.0535879, 0.0258824,
          0.0142811, 0.00558841, 0.00269914, 0.000719321]
COMPTON_AIR = [0.19921, 0.198824, 0.198439, 0.197676, 0.19692, 0.196172,
               0.195432, 0.193972, 0.192541, 0.189081, 0.185782, 0.179621,
               0.173983, 0.168802, 0.164026, 0.155508, 0.148132, 0.133358]

# average soft tissue, 1.0 g/cm^3
TOTAL_TISSUE = [3829.82, 1286.44, 575.609, 179.299, 76.823, 39.4819, 22.8309,
                9.60614, 4.93861, 1.55877, 0.761651, 0.360427, 0.260895,
                0.22226, 0.202422, 0.181215, 0.168701, 0.148953]
PE_TISSUE = [3829.6, 1286.22, 575.39, 179.081, 76.6061, 39.265895, 22.6157,
             9.392558, 4.7266, 1.25778, 0.491674, 0.130838, 0.0511454,
             0.0246827, 0.0136102, 0.00532029, 0.00256756, 0.000683248]
COMPTON_TISSUE = [0.219349, 0.218924, 0.218501, 0.21766, 0.216828, 0.216005,
                  0.215189, 0.213582, 0.212006, 0.208197, 0.204564, 0.19778,
                  0.191572, 0.185868, 0.180609, 0.17123, 0.163108, 0.14684]

# mass energy-absorption coefficient of air, cm^2/g, same grid; drives the
# fluence-to-kerma conversion
MUEN_AIR = [3599.0, 1188.0, 526.2, 161.4, 76.36, 39.31, 22.7, 9.446, 4.742,
            1.334, 0.5389, 0.1537, 0.06833, 0.04098, 0.03041, 0.02407,
            0.02325, 0.02496]

ELECTRON_DENSITY_PER_G = {
    "water": 3.34283e23,
    "soft_tissue": 3.31016e23,
    "air": 3.00624e23,
}

DENSITY_G_CM3 = {
    "water": 1.0,
    "soft_tissue": 1.0,
    "air": 0.0012,
}
