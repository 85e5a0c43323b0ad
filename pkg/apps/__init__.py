# strokebench - Apps Package
