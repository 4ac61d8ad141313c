"""partmask-hub: интерпретируемый сверточный слой с масками частей."""
