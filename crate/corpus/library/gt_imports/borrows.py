# Import block of the reference Python implementation of Borrows.
from flask import Flask, jsonify, request
import pymongo
from bson import ObjectId
import requests
from datetime import date, datetime, timedelta
import os
