# curvcone package
