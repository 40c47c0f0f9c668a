# Frozen reduced basis approximation of parameterized evolution equations
