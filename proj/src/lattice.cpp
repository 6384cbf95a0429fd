// implemented module by module
